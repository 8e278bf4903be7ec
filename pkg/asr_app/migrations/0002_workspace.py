from django.db import migrations, models


class Migration(migrations.Migration):

    dependencies = [
        ('asr_app', '0001_initial'),
    ]

    operations = [
        migrations.AddField(
            model_name='scoredrun',
            name='workspace',
            field=models.CharField(default='', max_length=255),
            preserve_default=False,
        ),
        migrations.AddField(
            model_name='spellerpass',
            name='workspace',
            field=models.CharField(default='', max_length=255),
            preserve_default=False,
        ),
        migrations.AlterUniqueTogether(
            name='scoredrun',
            unique_together={('workspace', 'system_name', 'testset')},
        ),
        migrations.AlterUniqueTogether(
            name='spellerpass',
            unique_together={('workspace', 'run_name', 'pass_index')},
        ),
    ]
