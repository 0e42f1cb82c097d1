"""Modules utilitaires."""
