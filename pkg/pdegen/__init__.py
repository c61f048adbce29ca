# This file makes the 'pdegen' directory a Python package.
