"""Planar distances in miles from lon/lat.

County-scale work only: an equirectangular projection around a reference
latitude. Errors stay far below parcel spacing over a ~70 mile extent.
"""
import numpy as np

EARTH_RADIUS_MILES = 3958.7613


def project_miles(lon, lat, ref_lat=None):
    """Project lon/lat (degrees) onto a local plane measured in miles.

    Parameters
    ----------
    lon, lat : array_like
        Coordinates in decimal degrees.
    ref_lat : float, optional
        Latitude whose cosine scales longitude. Defaults to the mean of `lat`.

    Returns
    -------
    ndarray of shape (n, 2)
        Easting and northing in miles.
    """
    lon = np.asarray(lon, dtype=float)
    lat = np.asarray(lat, dtype=float)
    if ref_lat is None:
        ref_lat = float(np.mean(lat)) if lat.size else 0.0
    scale = np.deg2rad(1.0) * EARTH_RADIUS_MILES
    x = lon * scale * np.cos(np.deg2rad(ref_lat))
    y = lat * scale
    return np.column_stack([x, y])


def unproject_miles(xy, ref_lat, origin=(0.0, 0.0)):
    """Inverse of :func:`project_miles` for a known reference latitude.

    `origin` is the (lon, lat) added back after conversion, so synthetic
    layouts built in miles around (0, 0) can be placed anywhere.
    """
    xy = np.asarray(xy, dtype=float)
    scale = np.deg2rad(1.0) * EARTH_RADIUS_MILES
    lon = xy[:, 0] / (scale * np.cos(np.deg2rad(ref_lat))) + origin[0]
    lat = xy[:, 1] / scale + origin[1]
    return lon, lat
