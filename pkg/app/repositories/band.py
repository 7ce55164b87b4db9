"""
Band repository - CSV dump of fiber spectra
"""

import csv
from pathlib import Path
from typing import Union

from app.services.bands import BandStructure, band_rows

BAND_COLUMNS = ["q_frac1", "q_frac2", "q_frac3", "n", "energy"]


class BandRepository:
    """Repository for band structures"""

    @staticmethod
    def save_band_csv(path: Union[str, Path], bands: BandStructure) -> Path:
        """Rows in grid order, bands ascending"""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(BAND_COLUMNS)
            for q1, q2, q3, n, energy in band_rows(bands):
                writer.writerow([repr(q1), repr(q2), repr(q3), n, repr(energy)])
        return path
