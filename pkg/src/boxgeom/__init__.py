from boxgeom.coding import BoxTargets, decode_box, decode_boxes, encode_box, encode_boxes
from boxgeom.frames import PooledBoxFeatures, from_canonical, grid_pool, grid_pool_vjp, points_in_box, to_canonical
from boxgeom.iou import bev_iou, bev_iou_matrix, iou_3d, iou_3d_matrix
from boxgeom.nms import nms
