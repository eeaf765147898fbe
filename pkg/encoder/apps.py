from django.apps import AppConfig


class EncoderAppConfig(AppConfig):
    name = 'encoder'
