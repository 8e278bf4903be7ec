from django.db import migrations, models


class Migration(migrations.Migration):

    initial = True

    dependencies = []

    operations = [
        migrations.CreateModel(
            name='ScoredRun',
            fields=[
                ('id', models.BigAutoField(auto_created=True, primary_key=True, serialize=False, verbose_name='ID')),
                ('system_name', models.CharField(max_length=100)),
                ('testset', models.CharField(max_length=50)),
                ('substitutions', models.PositiveIntegerField()),
                ('deletions', models.PositiveIntegerField()),
                ('insertions', models.PositiveIntegerField()),
                ('reference_length', models.PositiveIntegerField()),
                ('cer', models.FloatField()),
                ('timestamp', models.DateTimeField(auto_now=True)),
            ],
            options={
                'unique_together': {('system_name', 'testset')},
            },
        ),
        migrations.CreateModel(
            name='SpellerPass',
            fields=[
                ('id', models.BigAutoField(auto_created=True, primary_key=True, serialize=False, verbose_name='ID')),
                ('run_name', models.CharField(max_length=100)),
                ('training_data', models.CharField(max_length=100)),
                ('pass_index', models.PositiveIntegerField()),
                ('steps', models.PositiveIntegerField()),
                ('learning_rate_max', models.FloatField()),
                ('validation_cer', models.FloatField(blank=True, null=True)),
                ('timestamp', models.DateTimeField(auto_now=True)),
            ],
            options={
                'unique_together': {('run_name', 'pass_index')},
            },
        ),
    ]
