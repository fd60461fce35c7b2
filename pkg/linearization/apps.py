from django.apps import AppConfig


class LinearizationConfig(AppConfig):
    default_auto_field = 'django.db.models.BigAutoField'
    name = 'linearization'
