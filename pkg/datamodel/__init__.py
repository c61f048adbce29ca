# This file makes the 'datamodel' directory a Python package.
