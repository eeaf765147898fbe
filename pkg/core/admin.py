from django.contrib import admin
from .models import EvaluationRun, TrainingRun


@admin.register(TrainingRun)
class TrainingRunAdmin(admin.ModelAdmin):
    list_display = ['run_name', 'status', 'epochs_completed', 'final_loss', 'best_loss', 'created_at']
    list_filter = ['status']
    search_fields = ['run_name', 'checkpoint_path']
    ordering = ['-created_at']


@admin.register(EvaluationRun)
class EvaluationRunAdmin(admin.ModelAdmin):
    list_display = ['mode', 'accuracy_mean', 'accuracy_std', 'num_seeds', 'checkpoint_path', 'created_at']
    list_filter = ['mode']
    search_fields = ['checkpoint_path']
    ordering = ['-created_at']
