"""Skeleton-stream action recognition with an IndRNN classifier and
sliding-window alarms for medical-condition actions."""

__version__ = "0.1.0"
