from django.apps import AppConfig


class DjangoLoadcastConfig(AppConfig):
    name = 'django_loadcast'
    verbose_name = 'Load forecasting backtests'
