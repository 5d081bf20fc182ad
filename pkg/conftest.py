"""Configure Django before pytest collects the polsar tests."""
import os

import django

os.environ.setdefault('DJANGO_SETTINGS_MODULE', 'skdnet.settings')
django.setup()
