# Grasp Quality Lab - Core Package
