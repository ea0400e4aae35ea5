"""Vertical-slice 3D semantic occupancy prediction at desk scale."""
