"""Bootstrap a conda environment for SegmentMonkey and verify the install.

The script creates (or reuses) the environment, installs ``requirements.txt``,
stores the chosen settings profile, runs the gradient check inside the new
environment and can generate the synthetic sample dataset.
"""

import json
import os
import shutil
import subprocess
import sys
import time

import src.settings.settings as settings

BAR_LENGTH = 30
DEFAULT_ENV = "segmentmonkey"
PYTHON_VERSION = "3.10"
GRADCHECK_ARGS = ["gradcheck", "--frames", "4", "--width", "2"]


def print_header():
    """Display the setup header."""
    print("=" * 50)
    print("SegmentMonkey Setup")
    print("=" * 50)


def progress(message, duration=1.5):
    """Simple progress bar animation."""
    steps = 10
    print(message, end="", flush=True)
    for i in range(steps):
        time.sleep(duration / steps)
        completed = int(BAR_LENGTH * (i + 1) / steps)
        bar = "[" + "#" * completed + " " * (BAR_LENGTH - completed) + "]"
        print(f"\r{message} {bar}", end="", flush=True)
    print()


def check_conda():
    """Return the path to conda or instruct the user to install it."""
    conda = shutil.which("conda")
    if not conda:
        print("Conda was not found. Please install Miniconda or Anaconda from https://conda.io and re-run this script.")
        sys.exit(1)
    return conda


def env_exists(env_name):
    """``True`` when conda lists an environment called exactly ``env_name``."""
    result = subprocess.run(["conda", "env", "list", "--json"], capture_output=True, text=True)
    if result.returncode != 0:
        return False
    try:
        prefixes = json.loads(result.stdout).get("envs", [])
    except json.JSONDecodeError:
        return False
    return any(prefix.replace("\\", "/").rstrip("/").rsplit("/", 1)[-1] == env_name for prefix in prefixes)


def create_env(env_name, python_version=PYTHON_VERSION):
    """Create the conda environment if it does not exist."""
    if env_exists(env_name):
        print(f"Environment '{env_name}' already exists.")
        return False
    progress("Creating conda environment")
    subprocess.check_call(["conda", "create", "-y", "-n", env_name, f"python={python_version}"])
    return True


def install_requirements(env_name):
    """Install requirements using conda run."""
    progress("Installing requirements")
    subprocess.check_call(["conda", "run", "-n", env_name, "pip", "install", "-r", "requirements.txt"])


def run_in_env(env_name, *args):
    """Run ``main.py`` with ``args`` inside the environment."""
    return subprocess.run(["conda", "run", "-n", env_name, "python", "main.py", *args],
                          capture_output=True, text=True)


def verify_install(env_name):
    """Run the gradient check in the new environment; ``True`` when every check passes."""
    progress("Verifying gradients", duration=0.5)
    result = run_in_env(env_name, *GRADCHECK_ARGS)
    if result.returncode == 0:
        print("Gradient check passed.")
        return True
    if result.returncode == 5:
        print("Warning: the gradient check reported failures:")
    else:
        print("Warning: segmentmonkey failed to start. Check the pip output above.")
    print(result.stdout or result.stderr)
    return False


def read_stored_settings(path):
    """Keys already saved in the settings file; empty when it is missing or unreadable."""
    if not os.path.exists(path):
        return {}
    try:
        with open(path, "r", encoding="utf-8") as f:
            stored = json.load(f)
    except (json.JSONDecodeError, OSError):
        return {}
    return stored if isinstance(stored, dict) else {}


def choose_profile(path=None):
    """Ask for a settings profile and store it next to the other saved keys."""
    path = path or settings.SETTINGS_FILE
    stored = read_stored_settings(path)
    current = stored.get("profile", settings.DEFAULT_SETTINGS["profile"])
    if current not in settings.PROFILES:
        current = settings.DEFAULT_SETTINGS["profile"]
    answer = input(f"Settings profile ({'/'.join(sorted(settings.PROFILES))}) [{current}]: ").strip() or current
    if answer not in settings.PROFILES:
        print(f"Unknown profile '{answer}', keeping '{current}'.")
        answer = current
    settings.save_settings({**stored, "profile": answer}, path)
    return answer


def generate_sample(env_name):
    """Optionally write the synthetic dataset for the chosen profile."""
    answer = input("Generate the synthetic sample dataset now? [y/N]: ").strip().lower()
    if answer not in ("y", "yes"):
        return False
    progress("Generating synthetic dataset", duration=0.5)
    result = run_in_env(env_name, "generate")
    print(result.stdout if result.returncode == 0 else result.stderr)
    return result.returncode == 0


def main():
    """Entry point for the setup script."""
    print_header()
    check_conda()
    env = input(f"Enter conda environment name [{DEFAULT_ENV}]: ").strip() or DEFAULT_ENV
    create_env(env)
    install_requirements(env)
    profile = choose_profile()
    ok = verify_install(env)
    if ok:
        generate_sample(env)
    print()
    print("Setup complete!" if ok else "Setup finished with warnings.")
    print(f"Activate the environment with: conda activate {env}")
    print(f"Settings profile: {profile}")
    print("Then run the models with: python main.py crossval")
    return 0 if ok else 1


if __name__ == "__main__":
    sys.exit(main())
