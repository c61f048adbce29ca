# This file makes the 'pretrain' directory a Python package.
