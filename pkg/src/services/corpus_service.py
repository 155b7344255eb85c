import json
import os
from typing import Any, Dict

from src.core.feature_processor import write_features
from src.core.models import SyntheticCorpusSpec
from src.core.synthetic import generate_synthetic
from src.utils.config_utils import build_model, read_key_values
from src.utils.file_utils import ensure_directory_exists, get_file_info, write_bytes_atomic
from src.utils.logging_utils import get_app_logger

# Initialize logger
logger = get_app_logger()

TRAIN_FILE = "train.dmsf"
TEST_FILE = "test.dmsf"
MANIFEST_FILE = "manifest.json"


class CorpusService:
    """Service for generating synthetic corpora"""

    def load_spec(self, spec_path: str) -> SyntheticCorpusSpec:
        """Read a generator spec from a key=value file"""
        return build_model(SyntheticCorpusSpec, read_key_values(spec_path), f"corpus spec {spec_path}")

    def generate(self, spec: SyntheticCorpusSpec, out_dir: str) -> Dict[str, Any]:
        """Write train/test DMSF files and a manifest; returns the manifest"""
        logger.info(f"Generating corpus: {spec.num_languages} languages x {spec.utterances_per_language} utterances into {out_dir}")
        try:
            ensure_directory_exists(out_dir)
            train, test = generate_synthetic(spec)
            files = {}
            for split, sequences, name in (("train", train, TRAIN_FILE), ("test", test, TEST_FILE)):
                path = write_features(os.path.join(out_dir, name), sequences)
                info = get_file_info(path)
                files[split] = {
                    "file_name": info["file_name"],
                    "utterances": len(sequences),
                    "file_size": info["file_size"],
                    "sha256": info["sha256"],
                }
            manifest = {
                "languages": spec.language_names(),
                "spec": spec.model_dump(),
                "files": files,
            }
            payload = json.dumps(manifest, indent=2, sort_keys=True).encode("utf-8") + b"\n"
            write_bytes_atomic(os.path.join(out_dir, MANIFEST_FILE), payload)
            logger.info(f"Corpus written: {files['train']['utterances']} train / {files['test']['utterances']} test utterances")
            return manifest
        except Exception as e:
            logger.error(f"Error generating corpus in {out_dir}: {str(e)}")
            raise


def get_corpus_service() -> CorpusService:
    return CorpusService()
