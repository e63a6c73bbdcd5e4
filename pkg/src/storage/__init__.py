# Storage Package
from src.storage.dataset_storage import DatasetStorage, claim_output_dir, package_versions, rebind_keypoints
