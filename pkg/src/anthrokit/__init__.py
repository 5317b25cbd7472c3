"""Pose-independent body measurements from sparse 3D landmarks."""
