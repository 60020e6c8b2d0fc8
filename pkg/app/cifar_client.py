import logging
import tarfile
from pathlib import Path
from typing import Union

import requests

from .exceptions import DatasetError

logger = logging.getLogger(__name__)


class CifarDownloadClient:
    """
    Downloads the official CIFAR-10 binary archive and unpacks it.
    An existing extraction is re-used instead of downloading again.
    """
    BASE_URL = "https://www.cs.toronto.edu/~kriz/cifar-10-binary.tar.gz"
    ARCHIVE_NAME = "cifar-10-binary.tar.gz"
    EXTRACTED_DIR = "cifar-10-batches-bin"
    CHUNK_SIZE = 1 << 20

    def __init__(self, url: str = BASE_URL, timeout: int = 60):
        self.url = url
        self.timeout = timeout

    def fetch(self, dest: Union[str, Path]) -> Path:
        """
        Make the binary batches available under ``dest``.

        Args:
            dest: Directory receiving the archive and its extraction.

        Returns:
            Path: The ``cifar-10-batches-bin`` directory.
        """
        dest = Path(dest)
        target = dest / self.EXTRACTED_DIR
        if (target / "test_batch.bin").is_file():
            logger.warning("Re-using existing CIFAR-10 extraction at %s", target)
            return target
        dest.mkdir(parents=True, exist_ok=True)
        archive = dest / self.ARCHIVE_NAME
        partial = archive.with_suffix(".part")

        try:
            with requests.get(self.url, stream=True, timeout=self.timeout) as response:
                response.raise_for_status()
                with open(partial, "wb") as handle:
                    for chunk in response.iter_content(chunk_size=self.CHUNK_SIZE):
                        handle.write(chunk)
        except requests.RequestException as e:
            partial.unlink(missing_ok=True)
            raise DatasetError(f"Error downloading CIFAR-10 from {self.url}: {e}") from e
        partial.replace(archive)

        try:
            with tarfile.open(archive, "r:gz") as tar:
                members = [m for m in tar.getmembers() if m.name.startswith(self.EXTRACTED_DIR)]
                if hasattr(tarfile, "data_filter"):
                    tar.extractall(dest, members=members, filter="data")
                else:
                    tar.extractall(dest, members=members)
        except tarfile.TarError as e:
            raise DatasetError(f"Corrupt CIFAR-10 archive {archive}: {e}") from e
        logger.info("CIFAR-10 extracted to %s", target)
        return target


def fetch_cifar10(dest: Union[str, Path]) -> Path:
    return CifarDownloadClient().fetch(dest)
