from django.apps import AppConfig


class PolsarConfig(AppConfig):
    default_auto_field = 'django.db.models.BigAutoField'
    name = 'polsar'
    verbose_name = 'Dual-frequency PolSAR classification'
