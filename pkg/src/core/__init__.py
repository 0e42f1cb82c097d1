"""Modules de calcul : hamiltoniens, ponts browniens, réseau, MCMC et observables."""
