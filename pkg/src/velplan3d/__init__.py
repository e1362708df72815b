"""Online velocity profiles and sampling-based local planning on 3D race tracks."""

from .apex import Apex, ApexSearchConfig, admissible_velocity, find_candidates, locate_apexes
from .ggcon import (AnalyticGG, GGMap, GGVertex, GripMap, GripZone, apparent_accels,
                    backward_decel_potential, forward_accel_potential, is_feasible)
from .track3d import Track3D, load_track, save_track
from .tracks import generate_synthetic_track
from .velprofile import ProfileConfig, VelocityProfile, generate_profile

__version__ = "0.1.0"
