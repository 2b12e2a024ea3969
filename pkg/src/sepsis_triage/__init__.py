"""ED-triage sepsis screening: protocols, concept extraction, boosted classifier, evaluation."""
