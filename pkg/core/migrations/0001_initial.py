# Generated by Django 6.0.1 on 2026-10-17 09:12

import django.db.models.deletion
from django.db import migrations, models


class Migration(migrations.Migration):

    initial = True

    dependencies = [
    ]

    operations = [
        migrations.CreateModel(
            name='TrainingRun',
            fields=[
                ('id', models.BigAutoField(auto_created=True, primary_key=True, serialize=False, verbose_name='ID')),
                ('run_name', models.CharField(max_length=255)),
                ('config', models.JSONField(default=dict)),
                ('status', models.CharField(choices=[('RUNNING', 'Running'), ('COMPLETED', 'Completed'), ('FAILED', 'Failed')], default='RUNNING', max_length=10)),
                ('epochs_completed', models.PositiveIntegerField(default=0)),
                ('final_loss', models.FloatField(blank=True, null=True)),
                ('best_loss', models.FloatField(blank=True, null=True)),
                ('checkpoint_path', models.CharField(blank=True, max_length=1024)),
                ('metrics_path', models.CharField(blank=True, max_length=1024)),
                ('error', models.TextField(blank=True)),
                ('created_at', models.DateTimeField(auto_now_add=True)),
                ('finished_at', models.DateTimeField(blank=True, null=True)),
            ],
            options={
                'db_table': 'training_runs',
                'ordering': ['-created_at'],
            },
        ),
        migrations.CreateModel(
            name='EvaluationRun',
            fields=[
                ('id', models.BigAutoField(auto_created=True, primary_key=True, serialize=False, verbose_name='ID')),
                ('mode', models.CharField(choices=[('probe', 'Linear probe'), ('finetune', 'Fine-tune')], max_length=10)),
                ('checkpoint_path', models.CharField(blank=True, max_length=1024)),
                ('accuracy_mean', models.FloatField()),
                ('accuracy_std', models.FloatField()),
                ('num_seeds', models.PositiveSmallIntegerField()),
                ('accuracies', models.JSONField(default=list)),
                ('created_at', models.DateTimeField(auto_now_add=True)),
                ('training_run', models.ForeignKey(blank=True, null=True, on_delete=django.db.models.deletion.SET_NULL, related_name='evaluations', to='core.trainingrun')),
            ],
            options={
                'db_table': 'evaluation_runs',
                'ordering': ['-created_at'],
            },
        ),
    ]
