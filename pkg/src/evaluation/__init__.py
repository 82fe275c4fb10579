from evaluation.matching import match, match_boxes
from evaluation.metrics import average_precision, average_precision_heading
from evaluation.report import bucketed_report, format_report
