import json
import os
from datetime import datetime
from typing import Any, Dict, List, Optional
import logging

import pandas as pd

from boundary_geometry import PlanarSet, parse_planar_set, planar_set_to_document
from errors import DocumentError
from plugin_estimator import FittedRule
from rule_tree import RuleTree, from_document, to_document
from synthetic_dist import LabeledDataset, PiecewiseDistribution, from_tables

# Fixed float rendering so equal results give byte-identical CSV files
RESULT_FLOAT_FORMAT = '%.12g'
COORDINATE_FLOAT_FORMAT = '%.17g'
RATES_COLUMNS = ["n", "J_n", "mean_excess", "std_err", "bound", "ratio"]


class JSONManager:
    """Read and write every document the experiments exchange"""

    def __init__(self, config):
        self.config = config
        self.logger = logging.getLogger(__name__)

        # Ensure directories exist
        os.makedirs(self.config.RESULTS_DIR, exist_ok=True)
        os.makedirs(self.config.LOGS_DIR, exist_ok=True)

    def _write_json(self, path: str, document: Any) -> str:
        directory = os.path.dirname(path)
        if directory:
            os.makedirs(directory, exist_ok=True)
        with open(path, 'w', encoding='utf-8') as f:
            json.dump(document, f, indent=2, ensure_ascii=False)
        return path

    def _read_json(self, path: str) -> Any:
        try:
            with open(path, 'r', encoding='utf-8') as f:
                return json.load(f)
        except json.JSONDecodeError as e:
            raise DocumentError(f"{path} is not valid JSON: {e}")

    # Rules

    def save_rule(self, f: RuleTree, path: str) -> str:
        self._write_json(path, to_document(f))
        self.logger.info(f"Saved rule (d={f.dim}) to {path}")
        return path

    def load_rule(self, path: str) -> RuleTree:
        return from_document(self._read_json(path))

    # Distributions

    def distribution_document(self, dist: PiecewiseDistribution) -> Dict[str, Any]:
        density, eta = dist.level_tables()
        return {
            "d": dist.dim,
            "resolution": dist.resolution,
            "density": [str(value) for value in density.ravel()],
            "eta": [str(value) for value in eta.ravel()],
            "h": str(dist.h),
            "a": str(dist.a),
            "A": str(dist.A)
        }

    def save_distribution(self, dist: PiecewiseDistribution, path: str) -> str:
        self._write_json(path, self.distribution_document(dist))
        self.logger.info(f"Saved distribution (d={dist.dim}, R={dist.resolution}) to {path}")
        return path

    def load_distribution(self, path: str) -> PiecewiseDistribution:
        document = self._read_json(path)
        try:
            return from_tables(document["d"], document["resolution"], document["density"],
                               document["eta"], document["h"], document["a"], document["A"])
        except (KeyError, TypeError) as e:
            raise DocumentError(f"Malformed distribution document {path}: {e}")

    # Datasets

    def save_dataset(self, data: LabeledDataset, path: Optional[str] = None) -> str:
        """Write the dataset CSV to `path`; returns the CSV text when no path is given"""
        frame = pd.DataFrame(data.points, columns=[f"x{axis + 1}" for axis in range(data.dim)])
        frame["y"] = data.labels.astype(int)
        if path is None:
            return frame.to_csv(index=False, float_format=COORDINATE_FLOAT_FORMAT, lineterminator="\n")
        frame.to_csv(path, index=False, float_format=COORDINATE_FLOAT_FORMAT)
        self.logger.info(f"Saved {data.size} samples to {path}")
        return path

    def load_dataset(self, path: str) -> LabeledDataset:
        try:
            frame = pd.read_csv(path, float_precision='round_trip')
        except (pd.errors.ParserError, pd.errors.EmptyDataError) as e:
            raise DocumentError(f"Cannot read dataset {path}: {e}")
        columns = list(frame.columns)
        dim = len(columns) - 1
        if dim < 1 or columns != [f"x{axis + 1}" for axis in range(dim)] + ["y"]:
            raise DocumentError(f"Dataset header must be x1,...,xd,y; got {','.join(columns)}")
        try:
            points = frame[columns[:-1]].to_numpy(dtype=float)
        except (TypeError, ValueError) as e:
            raise DocumentError(f"Dataset {path} has non-numeric coordinates: {e}")
        if frame.isna().to_numpy().any():
            raise DocumentError(f"Dataset {path} has empty or NaN cells")
        # LabeledDataset rejects labels outside {-1, +1} before narrowing them
        return LabeledDataset(dim, points, frame["y"].to_numpy())

    def save_counts(self, fitted: FittedRule, path: str) -> str:
        pd.DataFrame(fitted.counts_rows()).to_csv(path, index=False)
        return path

    # Planar sets

    def load_planar_set(self, path: str) -> PlanarSet:
        return parse_planar_set(self._read_json(path))

    def save_planar_set(self, s: PlanarSet, path: str) -> str:
        return self._write_json(path, planar_set_to_document(s))

    # Results

    def rates_csv(self, rows: List[Dict[str, Any]]) -> str:
        frame = pd.DataFrame(rows, columns=RATES_COLUMNS)
        return frame.to_csv(index=False, float_format=RESULT_FLOAT_FORMAT, lineterminator='\n')

    def save_rates(self, rows: List[Dict[str, Any]], path: Optional[str] = None) -> str:
        """Write the rates table to `path`; returns the CSV text"""
        text = self.rates_csv(rows)
        if path:
            directory = os.path.dirname(path)
            if directory:
                os.makedirs(directory, exist_ok=True)
            with open(path, 'w', encoding='utf-8', newline='') as f:
                f.write(text)
            self.logger.info(f"Saved {len(rows)} rate rows to {path}")
        return text

    def save_report(self, report: Dict[str, Any], path: str) -> str:
        self._write_json(path, report)
        self.logger.info(f"Saved report to {path}")
        return path

    def load_config(self, path: str) -> Dict[str, Any]:
        document = self._read_json(path)
        if not isinstance(document, dict):
            raise DocumentError(f"Configuration {path} must be a JSON object")
        return document

    def save_run_log(self, log_data: Dict) -> str:
        """Save run log with timestamp"""
        timestamp = self.config.get_current_timestamp()
        filename = f"run_log_{timestamp}.json"
        filepath = os.path.join(self.config.LOGS_DIR, filename)

        log_data = dict(log_data, saved_at=datetime.now().isoformat())
        return self._write_json(filepath, log_data)
