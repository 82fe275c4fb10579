from detector.pipeline import DetectorOp, TwoStageDetector
from detector.proposals import ProposalSet, select_proposals_infer, select_proposals_train
from detector.rcnn import rcnn_forward
from detector.rpn import MiniRPN, rpn_forward
from detector.scenes import SyntheticScene, generate_scene
from detector.trainer import train_toy
