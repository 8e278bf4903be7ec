from django.db import models


class ScoredRun(models.Model):
    workspace = models.CharField(max_length=255)
    system_name = models.CharField(max_length=100)
    testset = models.CharField(max_length=50)
    substitutions = models.PositiveIntegerField()
    deletions = models.PositiveIntegerField()
    insertions = models.PositiveIntegerField()
    reference_length = models.PositiveIntegerField()
    cer = models.FloatField()
    timestamp = models.DateTimeField(auto_now=True)

    class Meta:
        unique_together = ('workspace', 'system_name', 'testset')

    @property
    def errors(self):
        return self.substitutions + self.deletions + self.insertions

    def __str__(self):
        return f"{self.system_name} - {self.testset}: {100 * self.cer:.2f}%"


class SpellerPass(models.Model):
    workspace = models.CharField(max_length=255)
    run_name = models.CharField(max_length=100)
    training_data = models.CharField(max_length=100)
    pass_index = models.PositiveIntegerField()
    steps = models.PositiveIntegerField()
    learning_rate_max = models.FloatField()
    validation_cer = models.FloatField(null=True, blank=True)
    timestamp = models.DateTimeField(auto_now=True)

    class Meta:
        unique_together = ('workspace', 'run_name', 'pass_index')

    def __str__(self):
        return f"{self.run_name} - pass {self.pass_index}"
