"""PointCrack3D - crack instance detection on unstructured surfaces from LIDAR point clouds"""

__version__ = "0.1.0"
