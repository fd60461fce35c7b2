"""
Django settings for the semilinear_recovery project.

The project has no web surface: Django provides settings, the management
command runner (``manage.py run`` / ``gen_data`` / ``validate``) and the
test runner.

For the full list of settings and their values, see
https://docs.djangoproject.com/en/5.2/ref/settings/
"""

from pathlib import Path
import os

# Build paths inside the project like this: BASE_DIR / 'subdir'.
BASE_DIR = Path(__file__).resolve().parent.parent

SECRET_KEY = os.environ.get('DJANGO_SECRET_KEY', 'semilinear-recovery-local-only')

DEBUG = os.environ.get('DJANGO_DEBUG', '0') == '1'

ALLOWED_HOSTS = []


# Application definition

INSTALLED_APPS = [
    'django.contrib.contenttypes',
    'django.contrib.auth',
    # Third-party apps
    'rest_framework',
    # Local apps
    'meshes',
    'coefficients',
    'forward',
    'linearization',
    'potentials',
    'recovery',
    'experiments',
]

# Nothing is persisted in a database; results go to the scenario output directory.
DATABASES = {}

USE_TZ = True

TIME_ZONE = 'UTC'

DEFAULT_AUTO_FIELD = 'django.db.models.BigAutoField'


# Numerical defaults shared by all apps. Every value can be overridden per call.

SEMILINEAR_RECOVERY = {
    # Small-data threshold for Dirichlet data (nodal sup norm on the boundary).
    'EPS_MAX': 0.1,
    'NEWTON_MAX_ITERATIONS': 25,
    'NEWTON_TOLERANCE': 1e-10,
    'LINEAR_RTOL': 1e-10,
    # Interior residual allowed for a field to count as a discrete solution.
    'SOLUTION_TOLERANCE': 1e-8,
    'NONLINEARITY_ORDER': 5,
    'FD_STEP': 1e-2,
    'FD_NEWTON_TOLERANCE': 1e-14,
    'TIKHONOV': 1e-8,
    'TIKHONOV_PER_PERCENT_NOISE': 1e-4,
    'MAX_CONDITION': 1e14,
    # Lower bound for recovered diffusion values.
    'SIGMA_MIN': 1e-2,
    # Localized potentials. DELTA0 is relative to the largest D2 energy per unit
    # boundary mass; the grid halves it HALVINGS times and the sequence keeps
    # members whose energy ratio grows at least MIN_GROWTH-fold per step.
    'POTENTIAL_DELTA0': 1e-2,
    'POTENTIAL_HALVINGS': 40,
    'POTENTIAL_STEPS': 6,
    'POTENTIAL_MIN_GROWTH': 2.0,
    # Leading eigenvalue vs. the Rayleigh quotient of its eigenvector.
    'POTENTIAL_RAYLEIGH_RTOL': 1e-8,
    # 'interior' (2/3, 1/6, 1/6 points) or 'lumped' (vertex rule).
    'QUADRATURE': 'interior',
}

SCENARIO_OUTPUT_DIR = BASE_DIR / 'runs'


LOGGING = {
    'version': 1,
    'disable_existing_loggers': False,
    'formatters': {
        'verbose': {
            'format': '{levelname} {asctime} {name} {message}',
            'style': '{',
        },
    },
    'handlers': {
        'console': {
            'class': 'logging.StreamHandler',
            'formatter': 'verbose',
        },
    },
    'root': {
        'handlers': ['console'],
        'level': 'WARNING',
    },
    'loggers': {
        app: {
            'handlers': ['console'],
            'level': os.environ.get('SEMILINEAR_LOG_LEVEL', 'INFO'),
            'propagate': False,
        }
        for app in (
            'meshes', 'coefficients', 'forward', 'linearization',
            'potentials', 'recovery', 'experiments',
        )
    },
}
