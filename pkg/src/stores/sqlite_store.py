import logging
import math
import os
import sqlite3
from typing import Callable, Optional, Union, override

from models import RunId, Seed
from models.run import BucketRow, Run, TraceRow
from stores.store import RunStore

DEFAULT_SAVE_FILE_PATH = "./rcd_runs.sqlite3"


class SchemaManager:
    @staticmethod
    def set_up_schema(connection: sqlite3.Connection):
        logger = logging.getLogger(SchemaManager.__name__)
        current_version = connection.execute("PRAGMA user_version").fetchone()[0]

        logger.info("Current sqlite schema version: %s", current_version)

        upgrade_functions: list[Callable[[sqlite3.Connection], None]] = [
            SchemaManager.__upgrade_schema_1,
            SchemaManager.__upgrade_schema_2,
        ]

        for upgrade_fn in upgrade_functions[current_version:]:
            upgrade_fn(connection)

        if logger.isEnabledFor(logging.INFO):
            logger.info("Upgraded sqlite schema version to: %s",
                        connection.execute("PRAGMA user_version").fetchone()[0])

    @staticmethod
    def __upgrade_schema_1(connection: sqlite3.Connection):
        with connection:
            connection.execute("""CREATE TABLE run(
                                    run_id INTEGER PRIMARY KEY AUTOINCREMENT,
                                    seed INTEGER NOT NULL,
                                    config TEXT NOT NULL,
                                    created_at TEXT DEFAULT CURRENT_TIMESTAMP
                                  )""")
            connection.execute("""CREATE TABLE trace(
                                    run_id INTEGER REFERENCES run(run_id),
                                    iteration INTEGER NOT NULL,
                                    rpn_cls REAL NOT NULL,
                                    rpn_box REAL NOT NULL,
                                    rcnn_cls REAL NOT NULL,
                                    rcnn_reg REAL NOT NULL,
                                    lambda REAL NOT NULL,
                                    gamma REAL NOT NULL,
                                    PRIMARY KEY (run_id, iteration)
                                  )""")
            connection.execute("""PRAGMA user_version = 1""")

    @staticmethod
    def __upgrade_schema_2(connection: sqlite3.Connection):
        with connection:
            connection.execute("""CREATE TABLE evaluation(
                                    evaluation_id INTEGER PRIMARY KEY AUTOINCREMENT,
                                    run_id INTEGER REFERENCES run(run_id),
                                    label TEXT NOT NULL,
                                    created_at TEXT DEFAULT CURRENT_TIMESTAMP
                                  )""")
            connection.execute("""CREATE TABLE evaluation_bucket(
                                    evaluation_id INTEGER REFERENCES evaluation(evaluation_id),
                                    position INTEGER NOT NULL,
                                    bucket TEXT NOT NULL,
                                    n_gt INTEGER NOT NULL,
                                    n_det INTEGER NOT NULL,
                                    ap REAL,
                                    aph REAL,
                                    PRIMARY KEY (evaluation_id, position)
                                  )""")
            connection.execute("""PRAGMA user_version = 2""")


def _nullable(value: float) -> Optional[float]:
    return None if math.isnan(value) else value


def _nan(value: Optional[float]) -> float:
    return math.nan if value is None else value


class SqliteStore(RunStore):
    def __init__(self, db_file_path: Union[str, os.PathLike] = DEFAULT_SAVE_FILE_PATH):
        if db_file_path is None:
            db_file_path = DEFAULT_SAVE_FILE_PATH
        self.__connection = sqlite3.connect(db_file_path, autocommit=False)
        self.__logger = logging.getLogger(self.__class__.__name__)
        SchemaManager.set_up_schema(self.__connection)

    @override
    def create_run(self, seed: Seed, config: str) -> RunId:
        with self.__connection:
            cursor = self.__connection.execute("""INSERT INTO run(seed, config) VALUES (:seed, :config)""",
                                               {"seed": seed, "config": config})
        self.__logger.debug("Created run %s for seed %s", cursor.lastrowid, seed)
        return cursor.lastrowid

    @override
    def get_run(self, run_id: RunId) -> Optional[Run]:
        with self.__connection:
            data = self.__connection.execute("""SELECT run_id, seed, config, created_at FROM run
                                                WHERE run_id = :run_id""",
                                             {"run_id": run_id}).fetchone()
        if data is None:
            return None
        return Run(*data)

    @override
    def latest_run(self) -> Optional[Run]:
        with self.__connection:
            data = self.__connection.execute("""SELECT run_id, seed, config, created_at FROM run
                                                ORDER BY run_id DESC LIMIT 1""").fetchone()
        if data is None:
            return None
        return Run(*data)

    @override
    def log_iteration(self, run_id: RunId, row: TraceRow):
        data = {
            "run_id": run_id,
            "iteration": row.iteration,
            "rpn_cls": row.rpn_cls,
            "rpn_box": row.rpn_box,
            "rcnn_cls": row.rcnn_cls,
            "rcnn_reg": row.rcnn_reg,
            "lambda": row.lam,
            "gamma": row.gamma,
        }
        with self.__connection:
            self.__connection.execute("""INSERT INTO trace
                                         VALUES (:run_id, :iteration, :rpn_cls, :rpn_box, :rcnn_cls, :rcnn_reg,
                                                 :lambda, :gamma)
                                         ON CONFLICT (run_id, iteration) DO
                                           UPDATE SET rpn_cls = excluded.rpn_cls, rpn_box = excluded.rpn_box,
                                                      rcnn_cls = excluded.rcnn_cls, rcnn_reg = excluded.rcnn_reg,
                                                      lambda = excluded.lambda, gamma = excluded.gamma""",
                                      data)

    @override
    def get_trace(self, run_id: RunId) -> list[TraceRow]:
        with self.__connection:
            data = self.__connection.execute("""SELECT iteration, rpn_cls, rpn_box, rcnn_cls, rcnn_reg, lambda, gamma
                                                FROM trace WHERE run_id = :run_id ORDER BY iteration""",
                                             {"run_id": run_id}).fetchall()
        return [TraceRow(*row) for row in data]

    @override
    def save_evaluation(self, run_id: Optional[RunId], label: str, rows: list[BucketRow]) -> int:
        with self.__connection:
            cursor = self.__connection.execute("""INSERT INTO evaluation(run_id, label) VALUES (:run_id, :label)""",
                                               {"run_id": run_id, "label": label})
            evaluation_id = cursor.lastrowid
            data = ({"evaluation_id": evaluation_id, "position": position, "bucket": row.bucket, "n_gt": row.n_gt,
                     "n_det": row.n_det, "ap": _nullable(row.ap), "aph": _nullable(row.aph)}
                    for position, row in enumerate(rows))
            self.__connection.executemany("""INSERT INTO evaluation_bucket
                                             VALUES (:evaluation_id, :position, :bucket, :n_gt, :n_det, :ap, :aph)""",
                                          data)
        self.__logger.debug("Saved evaluation %s (%s buckets)", evaluation_id, len(rows))
        return evaluation_id

    @override
    def get_evaluation(self, evaluation_id: int) -> list[BucketRow]:
        with self.__connection:
            data = self.__connection.execute("""SELECT bucket, n_gt, n_det, ap, aph FROM evaluation_bucket
                                                WHERE evaluation_id = :evaluation_id ORDER BY position""",
                                             {"evaluation_id": evaluation_id}).fetchall()
        return [BucketRow(bucket, n_gt, n_det, _nan(ap), _nan(aph)) for bucket, n_gt, n_det, ap, aph in data]

    @override
    def close(self):
        self.__connection.close()
