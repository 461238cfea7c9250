# Generated by Django 5.2.8 on 2026-10-18 15:30

from django.db import migrations, models


class Migration(migrations.Migration):

    dependencies = [
        ('floquet_dynamics', '0001_initial'),
    ]

    operations = [
        migrations.AlterField(
            model_name='simulationrun',
            name='master_seed',
            field=models.CharField(max_length=20),
        ),
    ]
