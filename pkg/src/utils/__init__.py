# Utils Package: shared logger and typed pipeline errors
