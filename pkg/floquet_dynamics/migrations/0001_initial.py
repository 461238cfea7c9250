# Generated by Django 5.2.8 on 2026-10-18 12:00

from django.db import migrations, models


class Migration(migrations.Migration):

    initial = True

    dependencies = [
    ]

    operations = [
        migrations.CreateModel(
            name='SimulationRun',
            fields=[
                ('id', models.BigAutoField(auto_created=True, primary_key=True, serialize=False, verbose_name='ID')),
                ('method', models.CharField(choices=[('frsh', 'Floquet surface hopping'), ('frqme', 'Floquet quantum master equation'), ('compare', 'Surface hopping vs. master equation')], max_length=16)),
                ('status', models.CharField(choices=[('RUNNING', 'Running'), ('SUCCEEDED', 'Succeeded'), ('FAILED', 'Failed')], default='RUNNING', max_length=16)),
                ('master_seed', models.DecimalField(decimal_places=0, max_digits=20)),
                ('config', models.JSONField(default=dict)),
                ('code_version', models.CharField(blank=True, max_length=40)),
                ('output_path', models.CharField(blank=True, max_length=500)),
                ('manifest_path', models.CharField(blank=True, max_length=500)),
                ('wall_time', models.FloatField(blank=True, null=True)),
                ('diagnostics', models.JSONField(blank=True, default=dict)),
                ('error_message', models.TextField(blank=True)),
                ('created_at', models.DateTimeField(auto_now_add=True)),
                ('finished_at', models.DateTimeField(blank=True, null=True)),
            ],
            options={
                'verbose_name': 'Simulation run',
                'verbose_name_plural': 'Simulation runs',
                'ordering': ['-created_at'],
            },
        ),
    ]
