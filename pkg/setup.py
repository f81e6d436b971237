#!/usr/bin/env python3
"""
Setup script for the EV Charging Station Thermal Monitor
"""

import importlib
import subprocess
import sys
from pathlib import Path


REQUIRED_MODULES = [
    "numpy",
    "scipy",
    "pandas",
    "matplotlib",
    "pydantic",
    "pydantic_settings",
    "yaml",
    "loguru",
    "orjson",
    "tqdm",
    "joblib",
]


def print_banner():
    """Print setup banner"""
    print(
        """
    ==============================================================
      EV Charging Station Thermal Monitor - setup
      station simulation / ensemble training / anomaly detection
    ==============================================================
    """
    )


def check_python_version():
    """Check Python version"""
    print("Checking Python version...")

    version = sys.version_info
    if version < (3, 9):
        print(f"  Python 3.9+ required, found {version.major}.{version.minor}")
        return False

    print(f"  Python {version.major}.{version.minor}.{version.micro} - Compatible")
    return True


def create_directories():
    """Create the run and log directories"""
    print("Creating directories...")

    for directory in ["logs", "runs", "configs"]:
        Path(directory).mkdir(parents=True, exist_ok=True)
        print(f"  Created: {directory}")


def install_dependencies():
    """Install Python dependencies"""
    print("Installing dependencies...")

    try:
        subprocess.check_call([sys.executable, "-m", "pip", "install", "-r", "requirements.txt"])
        print("  Dependencies installed successfully")
        return True
    except subprocess.CalledProcessError as e:
        print(f"  Failed to install dependencies: {e}")
        return False


def test_imports():
    """Test if all required modules can be imported"""
    print("Testing imports...")

    failed_imports = []
    for module in REQUIRED_MODULES:
        try:
            importlib.import_module(module)
            print(f"  ok      {module}")
        except ImportError:
            print(f"  missing {module}")
            failed_imports.append(module)

    if failed_imports:
        print(f"  Failed to import: {', '.join(failed_imports)}")
        return False
    return True


def print_next_steps():
    print(
        """
    Next steps:
      1. Review configs/default.yaml (station, sessions, training, detection)
      2. Run the full healthy/faulted replication:  ./start.sh
      3. Or run the stages by hand:
           python main.py simulate --seed 0 --out runs/train_day
           python main.py train --data runs/train_day/dataset.csv --seed 0 --out runs/model.json
           python main.py detect --model runs/model.json --data runs/train_day/dataset.csv --out runs/detect
      4. Tests:  pytest  (add -m slow for the full-scale replication)
    """
    )


def main():
    """Main setup function"""
    print_banner()

    if not check_python_version():
        sys.exit(1)

    create_directories()

    if not install_dependencies():
        print("Setup failed during dependency installation")
        sys.exit(1)

    if not test_imports():
        print("Setup failed during import testing")
        sys.exit(1)

    print_next_steps()


if __name__ == "__main__":
    if len(sys.argv) > 1:
        # Invoked by a build backend (pip install / egg_info / bdist_wheel):
        # packaging metadata lives in pyproject.toml
        from setuptools import setup

        setup()
    else:
        main()
