#!/usr/bin/env python3
"""
rpprec - Instance-wise Prompt Personalization for LLM Recommenders
Multi-agent actor-critic that picks, per user, the sentences of a ranking
prompt, with a seeded simulated ranker for offline experiments.
"""

from setuptools import setup, find_packages
import os

def read_file(filename):
    """Read file contents."""
    with open(filename, "r", encoding="utf-8") as fh:
        return fh.read()

def read_requirements():
    """Read requirements from requirements.txt."""
    try:
        return [line.strip() for line in read_file("requirements.txt").split('\n')
                if line.strip() and not line.startswith("#")]
    except FileNotFoundError:
        return ["numpy>=1.22", "requests>=2.25.0", "backoff>=2.0", "jinja2>=3.0.0", "psutil>=5.8.0"]

setup(
    name="rpprec",
    version="1.0.0",
    author="rpprec developers",
    description="Instance-wise prompt personalization for LLM recommenders with multi-agent actor-critic",
    long_description=read_file("README.md") if os.path.exists("README.md") else "rpprec",
    long_description_content_type="text/markdown",
    packages=find_packages(include=["rpprec", "rpprec.*"]),
    classifiers=[
        "Development Status :: 4 - Beta",
        "Intended Audience :: Science/Research",
        "License :: OSI Approved :: MIT License",
        "Operating System :: OS Independent",
        "Programming Language :: Python :: 3",
        "Topic :: Scientific/Engineering :: Artificial Intelligence",
    ],
    python_requires=">=3.8",
    install_requires=read_requirements(),
    include_package_data=True,
    package_data={
        "rpprec": [
            "data/*.json",
        ],
    },
    entry_points={
        "console_scripts": [
            "rpprec=rpprec.cli:main",
        ],
    },
    keywords="recommendation llm prompting reinforcement-learning actor-critic ranking",
    extras_require={
        "dev": ["pytest>=6.0", "black", "flake8", "mypy"],
    },
)
