# Grasp Quality Lab - Utilities Package
