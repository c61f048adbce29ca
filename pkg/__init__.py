# This file makes the repository root importable as a package.
