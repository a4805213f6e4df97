#!/usr/bin/env python3
"""
Setup script for Amplab - A Numerical Laboratory for Individual Maximum Principles
"""

import re

from setuptools import setup, find_packages

# Read the README file
def read_readme():
    with open("README.md", "r", encoding="utf-8") as fh:
        return fh.read()

# Read requirements
def read_requirements():
    with open("requirements.txt", "r", encoding="utf-8") as fh:
        return [line.strip() for line in fh if line.strip() and not line.startswith("#")]

# Version, author and description live in the package
def read_metadata():
    with open("src/amplab/__init__.py", "r", encoding="utf-8") as fh:
        return dict(re.findall(r'^__(\w+)__ = "([^"]*)"', fh.read(), re.MULTILINE))

metadata = read_metadata()

setup(
    name="amplab",
    version=metadata["version"],
    author=metadata["author"],
    description=metadata["description"],
    long_description=read_readme(),
    long_description_content_type="text/markdown",
    packages=find_packages(where="src"),
    package_dir={"": "src"},
    classifiers=[
        "Development Status :: 4 - Beta",
        "Intended Audience :: Science/Research",
        "License :: OSI Approved :: MIT License",
        "Operating System :: POSIX :: Linux",
        "Programming Language :: Python :: 3",
        "Programming Language :: Python :: 3.9",
        "Programming Language :: Python :: 3.10",
        "Programming Language :: Python :: 3.11",
        "Programming Language :: Python :: 3.12",
        "Topic :: Scientific/Engineering :: Mathematics",
    ],
    python_requires=">=3.9",
    install_requires=read_requirements(),
    extras_require={
        "test": ["pytest>=7.0", "hypothesis>=6.0"],
    },
    entry_points={
        "console_scripts": [
            "amplab=amplab.main:main",
        ],
    },
    include_package_data=True,
    zip_safe=False,
)
