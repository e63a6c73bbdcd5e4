# Pose Graph Package
from src.pose_graph.factors import Factor, FactorKind, GraphSolution, PoseNode
from src.pose_graph.g2o import read_g2o, write_g2o
from src.pose_graph.pose_graph import PoseGraph
