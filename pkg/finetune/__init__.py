# This file makes the 'finetune' directory a Python package.
