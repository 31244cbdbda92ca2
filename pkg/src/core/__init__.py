"""
Core module for the video-language pre-training toolkit
Contains the tensor engine, optimizer, gradient checking, configuration and utilities
"""
