"""Orchestration des expériences, répliques parallèles et sorties."""
