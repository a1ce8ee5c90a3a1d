"""
Configuration settings for the feeder impedance identification toolkit
"""

import math
import os

# Application settings
APP_TITLE = "Feeder Impedance Identification"
LOG_LEVEL = os.getenv('FEEDER_ID_LOG_LEVEL', 'INFO')
LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"
N_JOBS = int(os.getenv('FEEDER_ID_N_JOBS', '1'))

# Exit codes
EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_NUMERICAL = 3

# Data file paths
DATA_DIR = os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), 'data')
TOPOLOGY_DIR = os.path.join(DATA_DIR, 'topologies')
SCENARIO_DIR = os.path.join(DATA_DIR, 'scenarios')
BUNDLED_SCENARIOS = [
    'chain50_noiseless',
    'chain50_noisy',
    'chain50_highpf',
    'chain500_noisy',
    'tree_fig2',
]

# Electrical defaults (SI units: volts, amperes, ohms, radians)
NOMINAL_VOLTAGE = 230.0
POWER_FLOOR_W = 1.0

# Line parameters of the bundled feeders
LINE_OHM_PER_KM = 0.4
LINE_XR_RATIO = 0.7
SHORT_LINE_M = 50.0
LONG_LINE_M = 500.0

# Load generator presets
LOAD_PRESETS = {
    'normal': {'pf_mean': 0.95, 'pf_std': 0.05, 'pf_min': 0.9, 'pf_max': 1.0},
    'high': {'pf_mean': 0.85, 'pf_std': 0.1, 'pf_min': 0.7, 'pf_max': 1.0},
}
LOAD_BASE_POWER_W = (300.0, 3000.0)
LOAD_DAILY_SNAPSHOTS = 1440
LOAD_FLUCTUATION = 0.35

# Numerical kernels
RANK_TOL = 1e-10
GRAM_COND_LIMIT = 1e8
ILL_CONDITIONED_WARNING = 1e6
SOLVER_CHUNK_ENTRIES = 2_000_000

# Fixed-point iteration defaults
DEFAULT_ALPHA = 0.1
DEFAULT_EPS = 1e-8
DEFAULT_MAX_ITERS = 200

# Regularization
NOISY_RUN_MU = 0.1

# Measurement noise full-scale defaults
FS_VOLTAGE = 250.0
FS_CURRENT_FACTOR = 1.2
FS_ANGLE = math.pi / 3
NOISE_CHANNELS = {'v': 0, 'i_mag': 1, 'theta': 2}

# CSV layouts
LOAD_PROFILE_COLUMNS = ['snapshot', 'node', 'active_power_w', 'power_factor']
MEASUREMENT_COLUMNS = ['snapshot', 'node', 'v_rms', 'i_rms', 'theta_rad']
GROUND_TRUTH_COLUMNS = ['snapshot', 'node', 'v_re', 'v_im', 'i_re', 'i_im']
RESULT_COLUMNS = [
    'algo', 'variant', 'noise_pct', 'realization', 'snapshots',
    'line_from', 'line_to', 'z_re_true', 'z_im_true', 'z_re_est', 'z_im_est',
    'rel_err', 'gamma_min', 'iters', 'cond_J', 'cost_full',
]
TRACE_COLUMNS = ['t', 'from', 'to', 'm', 'checksum']
CSV_FLOAT_FORMAT = "%.12g"
MEASUREMENT_FLOAT_FORMAT = "%.17g"
RESULT_FILES = {
    'results': 'results.csv',
    'error_by_line': 'error_by_line.csv',
    'error_vs_m': 'error_vs_m.csv',
    'cond_by_line': 'cond_by_line.csv',
}
