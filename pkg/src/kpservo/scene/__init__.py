from .geometry import (TASKS, TaskPreset, apply_motion, collided, converged,
                       hole_frame_error, in_workspace, motion_label, pose_error,
                       ROTATION_SCALE)
from .render import RandomizationConfig, WorkspaceError, frame_seeds, render_stereo
from .rollout import (RolloutConfig, SceneSample, displaced_pose, perturb_frame,
                      rollout, rollout_endpoint, sample_hole_pose, step_env)
from .dataset import (Dataset, DatasetError, generate_dataset, load_dataset,
                      save_dataset, write_pgm)
