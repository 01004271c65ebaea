import uuid

from django.db import migrations, models


class Migration(migrations.Migration):

    initial = True

    dependencies = []

    operations = [
        migrations.CreateModel(
            name='SimulationRun',
            fields=[
                ('id', models.UUIDField(default=uuid.uuid4, editable=False, primary_key=True, serialize=False)),
                ('subcommand', models.CharField(choices=[('simulate', 'Simulate'), ('consensus', 'Consensus probability'), ('cluster', 'Clustering'), ('fixation', 'Fixation proxy'), ('ld-check', 'Large deviation check'), ('analytics', 'Analytics'), ('phase-diagram', 'Phase diagram'), ('spacetime', 'Space-time diagram')], max_length=20)),
                ('config', models.JSONField(default=dict, help_text='Canonical run configuration')),
                ('config_hash', models.CharField(db_index=True, help_text='SHA-256 of the canonical config', max_length=64)),
                ('master_seed', models.DecimalField(blank=True, decimal_places=0, max_digits=20, null=True)),
                ('output_dir', models.CharField(blank=True, max_length=500)),
                ('status', models.CharField(choices=[('pending', 'Pending'), ('running', 'Running'), ('completed', 'Completed'), ('failed', 'Failed')], default='pending', max_length=20)),
                ('summary', models.JSONField(blank=True, default=dict)),
                ('failure_reason', models.TextField(blank=True, null=True)),
                ('started_at', models.DateTimeField(blank=True, null=True)),
                ('completed_at', models.DateTimeField(blank=True, null=True)),
                ('failed_at', models.DateTimeField(blank=True, null=True)),
                ('created_at', models.DateTimeField(auto_now_add=True)),
                ('updated_at', models.DateTimeField(auto_now=True)),
            ],
            options={
                'ordering': ['-created_at'],
            },
        ),
    ]
