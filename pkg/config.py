import os

from dotenv import load_dotenv

load_dotenv(os.path.join(os.path.dirname(__file__), '.env'))


class Config:
    # Backend selection only; everything else lives in the run config
    DEVICE = os.getenv('SUTURING_DEVICE', 'cpu')

    # Output root used when the run config leaves output_dir empty
    OUTPUT_DIR = os.getenv('SUTURING_OUTPUT_DIR', os.path.join(os.path.dirname(__file__), 'runs'))  # noqa: E501

    DEFAULT_RUN_CONFIG = os.path.join(os.path.dirname(__file__), 'configs', 'desk.yaml')  # noqa: E501

    # Frame files accepted for --first-frame
    ALLOWED_EXTENSIONS = {'.png'}
