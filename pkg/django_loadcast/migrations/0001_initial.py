# Generated by Django 5.0.6 on 2026-10-19 09:12

import uuid

import django.db.models.deletion
import django.utils.timezone
from django.db import migrations, models


class Migration(migrations.Migration):

    initial = True

    dependencies = [
    ]

    operations = [
        migrations.CreateModel(
            name='BacktestRun',
            fields=[
                ('id', models.UUIDField(default=uuid.uuid4, editable=False, primary_key=True, serialize=False)),
                ('state', models.CharField(choices=[('blocked', 'Blocked'), ('waiting_for_date', 'Waiting For Date'), ('waiting_for_worker', 'Waiting For Worker'), ('completed', 'Completed'), ('given_up', 'Given Up')], db_index=True, default='waiting_for_worker', max_length=30)),
                ('config', models.JSONField()),
                ('checkpoint', models.JSONField(blank=True, null=True)),
                ('metrics', models.JSONField(blank=True, null=True)),
                ('days_done', models.IntegerField(default=0)),
                ('days_total', models.IntegerField(blank=True, null=True)),
                ('precondition_date', models.DateTimeField(default=django.utils.timezone.now, help_text='Run will not be advanced before this date.')),
                ('created_at', models.DateTimeField(db_index=True, default=django.utils.timezone.now)),
            ],
            options={
                'ordering': ('-created_at',),
                'indexes': [
                    models.Index(condition=models.Q(('state', 'waiting_for_date')), fields=['precondition_date'], name='loadcast_waiting_for_date_idx'),
                    models.Index(condition=models.Q(('state', 'waiting_for_worker')), fields=['created_at'], name='loadcast_waiting_worker_idx'),
                ],
            },
        ),
        migrations.CreateModel(
            name='RunProgress',
            fields=[
                ('id', models.UUIDField(default=uuid.uuid4, editable=False, primary_key=True, serialize=False)),
                ('success', models.BooleanField()),
                ('created_at', models.DateTimeField(default=django.utils.timezone.now)),
                ('time_taken', models.DurationField(null=True)),
                ('message', models.CharField(blank=True, max_length=200)),
                ('days_done', models.IntegerField(default=0)),
                ('run', models.ForeignKey(on_delete=django.db.models.deletion.CASCADE, related_name='progress', to='django_loadcast.backtestrun')),
            ],
            options={
                'ordering': ('run', '-created_at'),
            },
        ),
    ]
