import os

import django

os.environ.setdefault('DJANGO_SETTINGS_MODULE', 'semilinear_recovery.settings')
django.setup()
