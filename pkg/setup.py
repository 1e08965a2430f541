from setuptools import setup, find_packages
import re


def get_version(verbose=1):
    """ Extract version information from source code """

    try:
        with open('kinetiq/version.py', 'r') as f:
            ln = f.readline()
            m = re.search('.* ''(.*)''', ln)
            version = (m.group(1)).strip('\'')
    except Exception as E:
        print(E)
        version = 'none'
    if verbose:
        print('get_version: %s' % version)
    return version


def readme():
    with open('README.md', encoding='utf-8') as f:
        return f.read()


setup(name='kinetiq',
      version=get_version(),
      description='Self-supervised, physics-informed estimation of sagittal-plane '
                  'gait dynamics from body-worn inertial sensors',
      long_description=readme(),
      long_description_content_type='text/markdown',
      classifiers=[
          'Development Status :: 3 - Alpha',
          'Intended Audience :: Science/Research',
          'Programming Language :: Python :: 3',
          'Topic :: Scientific/Engineering'
      ],
      license='MIT',
      python_requires='>=3.7',
      packages=find_packages(),
      package_data={'kinetiq': ['kinetiqrc.json', 'model/templates/*.txt']},
      install_requires=[
          'numpy>=1.17',
          'scipy>=1.3',
          'h5py>=2.6',
          'blinker',
          'matplotlib>=3.1',
          'python-dateutil',
      ],
      entry_points={'console_scripts': ['kinetiq = kinetiq.cli:main']},
      zip_safe=False)
