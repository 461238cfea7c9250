from django.apps import AppConfig


class FloquetDynamicsConfig(AppConfig):
    default_auto_field = "django.db.models.BigAutoField"
    name = "floquet_dynamics"
    verbose_name = "Floquet Dynamics"
