from django.apps import AppConfig


class ContrastiveConfig(AppConfig):
    name = 'contrastive'
