from hypothesis import settings

# Solver calls inside property bodies make per-example timing noisy;
# rely on example counts, not deadlines.
settings.register_profile("lab", deadline=None)
settings.load_profile("lab")
