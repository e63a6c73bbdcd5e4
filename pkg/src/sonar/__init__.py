# Sonar Package
