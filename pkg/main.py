#!/usr/bin/env python3
"""
VidLang - Main Entry Point
Video-language contrastive pre-training with downstream retrieval, classification and captioning
"""

import os
import sys

# Add the src directory to the path
sys.path.insert(0, os.path.join(os.path.dirname(__file__), 'src'))

from src.cli import main

if __name__ == "__main__":
    sys.exit(main())
