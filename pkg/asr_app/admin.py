from django.contrib import admin

from .models import ScoredRun, SpellerPass


@admin.register(ScoredRun)
class ScoredRunAdmin(admin.ModelAdmin):
    list_display = ('system_name', 'testset', 'substitutions', 'deletions', 'insertions', 'reference_length', 'cer')
    list_filter = ('workspace', 'testset')


@admin.register(SpellerPass)
class SpellerPassAdmin(admin.ModelAdmin):
    list_display = ('run_name', 'training_data', 'pass_index', 'steps', 'validation_cer')
    list_filter = ('workspace', 'run_name')
