from django.apps import AppConfig


class VoterConfig(AppConfig):
    default_auto_field = 'django.db.models.BigAutoField'
    name = 'voter'
    verbose_name = 'Constrained voter model'
