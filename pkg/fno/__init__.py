# This file makes the 'fno' directory a Python package.
