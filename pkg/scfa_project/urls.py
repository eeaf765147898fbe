"""
URL configuration for scfa_project.

Only the admin is served: it is the browser for the run registry.
"""
from django.contrib import admin
from django.urls import path

urlpatterns = [
    path('admin/', admin.site.urls),
]
