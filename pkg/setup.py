#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
Theseus - Setup Script
======================

Setup script for installing Theseus.
"""

from setuptools import setup, find_packages

# Read the long description from README.md
with open("README.md", "r", encoding="utf-8") as fh:
    long_description = fh.read()

# Define package requirements
requirements = [
    "numpy>=1.22.0",
    "rich>=12.0.0",
    "pyyaml>=5.4.0",
    "psutil>=5.9.0",
]

# Define development requirements
dev_requirements = [
    "pytest>=7.0.0",
    "pytest-cov>=4.1.0",
    "pytest-mock>=3.10.0",
    "flake8>=6.0.0",
    "black>=23.3.0",
    "mypy>=1.3.0",
    "isort>=5.12.0",
    "tox>=4.6.0",
]

setup(
    name="theseus",
    version="0.1.0",
    description="Compress transformer encoders by progressive module replacing",
    long_description=long_description,
    long_description_content_type="text/markdown",
    author="Theseus Team",
    packages=find_packages(exclude=["tests", "tests.*", "examples", "examples.*"]),
    classifiers=[
        "Development Status :: 3 - Alpha",
        "Intended Audience :: Science/Research",
        "License :: OSI Approved :: MIT License",
        "Programming Language :: Python :: 3",
        "Programming Language :: Python :: 3.8",
        "Programming Language :: Python :: 3.9",
        "Programming Language :: Python :: 3.10",
        "Programming Language :: Python :: 3.11",
        "Topic :: Scientific/Engineering :: Artificial Intelligence",
    ],
    python_requires=">=3.8",
    install_requires=requirements,
    extras_require={
        "dev": dev_requirements,
    },
    entry_points={
        "console_scripts": [
            "theseus=theseus.__main__:main",
        ],
    },
    include_package_data=True,
    zip_safe=False,
)
